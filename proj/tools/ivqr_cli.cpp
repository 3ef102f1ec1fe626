// ivqr command-line front end.
//
// Every long option is also a key of the flat key=value config file given by
// --config; flags on the command line win over file values, which win over
// the built-in defaults.

#include <ivqr/ivqr.hpp>

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ivqr;

namespace {

constexpr const char* tool_version = "ivqr 1.0.0";

struct RunConfig
{
  std::string command;
  std::string data;
  std::string y = "y";
  std::vector<std::string> d{ "d" };
  std::vector<std::string> x{ "x0" };
  std::vector<std::string> z{ "z" };
  std::vector<double> tau{ 0.5 };
  std::string method;
  std::string profiling = "plain";
  std::vector<std::string> grid{ "-1:3:0.01" };
  std::vector<std::string> beta_grid{ "-2:2:0.05" };
  double p = 0.05;
  int draws = 1000;
  std::uint64_t seed = 1;
  double h = 0.0;
  std::string out = ".";
  unsigned threads = 0;
  // quasi-Bayes
  long iterations = 6000;
  long burn_in = 1000;
  // qte
  std::vector<double> qte_tau{ 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9 };
  int cdf_points = 101;
  // diagnose (nan: per-arm sample quantiles)
  double y0 = std::nan("");
  double y1 = std::nan("");
  // simulate
  std::string design = "A";
  long n = 1000;
  double rho = 0.5;
  double pi0 = 0.0;
  double pi1 = 1.0;
  double alpha0 = 1.0;
  double alpha1 = 0.0;
  std::vector<double> covariate_coef;
  double slippage = 0.0;
};

std::string join(const std::vector<std::string>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + v[i];
  return s;
}

std::string join(const std::vector<double>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + csv::format_number(v[i]);
  return s;
}

// Resolved settings that can change numeric output. The output directory and
// the thread hint are left out on purpose.
std::vector<std::pair<std::string, std::string>> canonical(const RunConfig& c)
{
  const auto f = [](double v) { return csv::format_number(v); };
  return {
    { "alpha0", f(c.alpha0) },
    { "alpha1", f(c.alpha1) },
    { "bandwidth", f(c.h) },
    { "beta-grid", join(c.beta_grid) },
    { "burn-in", std::to_string(c.burn_in) },
    { "cdf-points", std::to_string(c.cdf_points) },
    { "command", c.command },
    { "covariate-coef", join(c.covariate_coef) },
    { "d", join(c.d) },
    { "data", c.data },
    { "design", c.design },
    { "draws", std::to_string(c.draws) },
    { "grid", join(c.grid) },
    { "iterations", std::to_string(c.iterations) },
    { "method", c.method },
    { "n", std::to_string(c.n) },
    { "p", f(c.p) },
    { "pi0", f(c.pi0) },
    { "pi1", f(c.pi1) },
    { "profiling", c.profiling },
    { "qte-tau", join(c.qte_tau) },
    { "rho", f(c.rho) },
    { "seed", std::to_string(c.seed) },
    { "slippage", f(c.slippage) },
    { "tau", join(c.tau) },
    { "x", join(c.x) },
    { "y", c.y },
    { "y0", f(c.y0) },
    { "y1", f(c.y1) },
    { "z", join(c.z) },
  };
}

std::string config_hash(const RunConfig& c)
{
  std::uint64_t h = 1469598103934665603ULL; // FNV-1a 64
  for (const auto& [k, v] : canonical(c))
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

struct Run
{
  RunConfig cfg;
  std::string hash;
  std::map<std::string, std::string> meta; ///< extra facts for meta.txt

  std::vector<std::string> header() const
  {
    return { "ivqr " + cfg.command + " config_hash=" + hash + " seed=" + std::to_string(cfg.seed) };
  }

  std::ofstream open(const std::string& name) const
  {
    const fs::path p = fs::path(cfg.out) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f)
      throw ConfigError("cannot write output file: " + p.string());
    return f;
  }

  void write_meta() const
  {
    std::ofstream f = open("meta.txt");
    for (const auto& c : header())
      f << "# " << c << "\n";
    f << "version=" << tool_version << "\n";
    f << "eigen=" << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n";
    for (const auto& [k, v] : canonical(cfg))
      f << k << "=" << v << "\n";
    for (const auto& [k, v] : meta)
      f << k << "=" << v << "\n";
  }
};

struct AxisSpec
{
  double lo, hi, step;
};

AxisSpec parse_axis(const std::string& spec, const char* key)
{
  std::vector<double> v;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ':')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size())
        throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError(std::string(key) + ": cannot read '" + spec + "' as lo:hi:step");
    }
  }
  if (v.size() == 1)
    v = { v[0], v[0], 1.0 };
  if (v.size() == 2)
    v.push_back(v[1] > v[0] ? (v[1] - v[0]) / 200.0 : 1.0);
  if (v.size() != 3)
    throw ConfigError(std::string(key) + ": expected lo:hi[:step], got '" + spec + "'");
  return { v[0], v[1], v[2] };
}

// One spec per coordinate; a single spec is reused for every coordinate.
std::vector<AxisSpec> axes_for(const std::vector<std::string>& specs, Index count, const char* key)
{
  if (specs.empty())
    throw ConfigError(std::string(key) + " is empty");
  if (specs.size() != 1 && static_cast<Index>(specs.size()) != count)
    throw ConfigError(std::string(key) + ": give one spec or one per coordinate (" +
                      std::to_string(count) + ")");
  std::vector<AxisSpec> out;
  for (Index j = 0; j < count; ++j)
    out.push_back(parse_axis(specs.size() == 1 ? specs[0] : specs[static_cast<std::size_t>(j)], key));
  return out;
}

Grid grid_of(const std::vector<AxisSpec>& axes)
{
  std::vector<std::vector<double>> a;
  for (const auto& s : axes)
    a.push_back(Grid::axis(s.lo, s.hi, s.step));
  return Grid(a);
}

Dataset load(const RunConfig& c)
{
  if (c.data.empty())
    throw ConfigError("no dataset given (set data=<file.csv>)");
  if (!fs::exists(c.data))
    throw ConfigError("dataset file does not exist: " + c.data);
  return load_dataset(c.data, ColumnMap{ c.y, c.d, c.x, c.z });
}

double single_tau(const RunConfig& c)
{
  if (c.tau.size() != 1)
    throw ConfigError(c.command + " takes a single tau");
  return c.tau[0];
}

std::vector<std::string> coef_names(const Dataset& ds)
{
  std::vector<std::string> n;
  for (const auto& l : ds.d_labels())
    n.push_back("alpha_" + l);
  for (const auto& l : ds.x_labels())
    n.push_back("beta_" + l);
  return n;
}

std::optional<double> bandwidth(const RunConfig& c)
{
  if (c.h < 0.0)
    throw ConfigError("bandwidth must be nonnegative (0 selects the default rule)");
  return c.h > 0.0 ? std::optional<double>(c.h) : std::nullopt;
}

// Copies a per-tau CSV block into `out`, prefixing a tau column; the header
// is written once.
void append_block(std::ostream& out, const std::string& block, double tau, bool& header_done)
{
  std::istringstream in(block);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#')
      continue;
    if (first) {
      first = false;
      if (!header_done)
        out << "tau," << line << "\n";
      header_done = true;
      continue;
    }
    out << csv::format_number(tau) << "," << line << "\n";
  }
}

Box box_for(const RunConfig& c, const Dataset& ds, std::vector<double>* steps)
{
  const auto a = axes_for(c.grid, ds.s(), "grid");
  const auto b = axes_for(c.beta_grid, ds.k(), "beta-grid");
  Box box;
  box.lower.resize(ds.s() + ds.k());
  box.upper.resize(ds.s() + ds.k());
  Index j = 0;
  for (const auto* list : { &a, &b })
    for (const auto& s : *list) {
      box.lower(j) = s.lo;
      box.upper(j) = s.hi;
      if (steps)
        steps->push_back(s.hi > s.lo ? s.step : 1.0);
      ++j;
    }
  return box;
}

int cmd_estimate(Run& run)
{
  const RunConfig& c = run.cfg;
  const std::string method = c.method.empty() ? "iqr" : c.method;
  const Dataset ds = load(c);
  const Grid grid = grid_of(axes_for(c.grid, ds.s(), "grid"));
  const auto names = coef_names(ds);

  std::ofstream est = run.open("estimates.csv");
  csv::Writer w(est);
  for (const auto& h : run.header())
    w.comment(h);
  std::vector<std::string> head{ "tau", "method" };
  for (const auto& n : names)
    head.push_back(n);
  for (const auto& n : names)
    head.push_back("se_" + n);
  head.push_back("objective");
  w.row(head);

  std::ostringstream profile;
  bool profile_header = false;
  for (double tau : c.tau) {
    EstimateResult r;
    std::ostringstream block;
    if (method == "iqr") {
      IqrOptions o;
      o.h = c.h;
      const IqrResult res = estimate(ds, tau, grid, o);
      r = res.estimate;
      try {
        r.covariance = asymptotic_variance(ds, tau, r.alpha_hat, r.beta_hat, c.h);
      } catch (const SingularityError& e) {
        run.meta["se_note_tau" + csv::format_number(tau)] = e.what();
      }
      write_profile_csv(block, res.table, ds.s(), ds.m(), ds.k());
    } else if (method == "gmm") {
      std::vector<double> steps;
      const Box box = box_for(c, ds, &steps);
      SearchStrategy st;
      st.steps = steps;
      const GmmObjective obj(ds, tau, InstrumentRule::stacked_zx, std::nullopt, bandwidth(c));
      r = minimize_gmm(obj, box, st);
    } else if (method == "cue") {
      OrthoOptions o;
      o.profiling = c.profiling == "l1" ? Profiling::l1 : Profiling::plain;
      o.h = c.h;
      const CueResult res = cue_estimate(ds, tau, grid, o);
      r = res.estimate;
      write_cue_csv(block, res.table);
    } else if (method == "qb") {
      const Box box = box_for(c, ds, nullptr);
      const GmmObjective obj(ds, tau, InstrumentRule::stacked_zx, std::nullopt, bandwidth(c));
      const Chain ch = sample(obj, box, c.iterations, c.burn_in, c.seed);
      const ChainSummary s = summaries(ch, c.p);
      r.alpha_hat = s.mean.head(ds.s());
      r.beta_hat = s.mean.tail(ds.k());
      r.tau = tau;
      r.method = "qb";
      r.covariance = Matrix(s.sd.cwiseAbs2().asDiagonal());
      r.objective = obj(s.mean);
      std::ofstream f = run.open("chain_tau" + csv::format_number(tau) + ".csv");
      write_chain_csv(f, ch, names, run.header());
      run.meta["acceptance_tau" + csv::format_number(tau)] = csv::format_number(ch.acceptance);
    } else {
      throw ConfigError("unknown estimate method '" + method + "' (iqr, gmm, cue, qb)");
    }
    if (!block.str().empty())
      append_block(profile, block.str(), tau, profile_header);
    std::vector<std::string> row{ csv::format_number(tau), r.method };
    const Vector th = r.theta();
    for (Index j = 0; j < th.size(); ++j)
      row.push_back(csv::format_number(th(j)));
    for (Index j = 0; j < th.size(); ++j)
      row.push_back(r.covariance ? csv::format_number(std::sqrt((*r.covariance)(j, j)))
                                 : "nan");
    row.push_back(csv::format_number(r.objective));
    w.row(row);
    for (const auto& [k, v] : r.notes)
      run.meta["note." + k] = v;
  }
  if (!profile.str().empty()) {
    std::ofstream f = run.open("profile.csv");
    for (const auto& h : run.header())
      f << "# " << h << "\n";
    f << profile.str();
  }
  run.meta["method"] = method;
  run.meta["grid_nodes"] = std::to_string(grid.size());
  std::cout << "wrote " << (fs::path(c.out) / "estimates.csv").string() << "\n";
  return 0;
}

void report_region(Run& run, const ConfidenceRegion& r, const std::vector<std::string>& names,
                   const std::vector<std::optional<std::pair<double, double>>>& hulls)
{
  std::ofstream f = run.open("region.csv");
  write_region_csv(f, r, names, run.header());
  std::ostringstream s;
  s << "method=" << r.method << " level=" << csv::format_number(r.level) << " accepted=" << r.accepted()
    << "/" << r.size() << "\n";
  if (r.empty()) {
    s << "empty region (model/instrument misspecification signal)\n";
  } else {
    for (std::size_t j = 0; j < hulls.size(); ++j)
      s << names[j] << ": [" << csv::format_number(hulls[j]->first) << ", "
        << csv::format_number(hulls[j]->second) << "]\n";
  }
  for (const auto& n : r.notes)
    s << "note: " << n << "\n";
  std::ofstream sum = run.open("summary.txt");
  for (const auto& h : run.header())
    sum << "# " << h << "\n";
  sum << s.str();
  std::cout << s.str();
}

int cmd_ci(Run& run)
{
  const RunConfig& c = run.cfg;
  const std::string method = c.method.empty() ? "ar" : c.method;
  const Dataset ds = load(c);
  const double tau = single_tau(c);
  const Grid grid = grid_of(axes_for(c.grid, ds.s(), "grid"));
  ConfidenceRegion r;
  if (method == "ar") {
    IqrOptions o;
    o.h = c.h;
    r = ar_region(ds, tau, grid, c.p, o);
  } else if (method == "qlr") {
    r = qlr_region(ds, tau, grid, c.p, c.draws, c.seed, c.h);
  } else if (method == "qlr2") {
    OrthoOptions o;
    o.profiling = c.profiling == "l1" ? Profiling::l1 : Profiling::plain;
    o.h = c.h;
    r = qlr2_region(ds, tau, grid, c.p, c.draws, c.seed, o);
  } else {
    throw ConfigError("unknown ci method '" + method + "' (ar, qlr, qlr2)");
  }
  std::vector<std::string> names;
  std::vector<std::optional<std::pair<double, double>>> hulls;
  for (Index j = 0; j < ds.s(); ++j) {
    names.push_back("alpha_" + ds.d_labels()[static_cast<std::size_t>(j)]);
    hulls.push_back(r.hull(j));
  }
  run.meta["method"] = method;
  report_region(run, r, names, hulls);
  return 0;
}

int cmd_fsci(Run& run)
{
  const RunConfig& c = run.cfg;
  const Dataset ds = load(c);
  const double tau = single_tau(c);
  auto axes = axes_for(c.grid, ds.s(), "grid");
  const auto b = axes_for(c.beta_grid, ds.k(), "beta-grid");
  axes.insert(axes.end(), b.begin(), b.end());
  double nodes = 1.0;
  for (const auto& a : axes)
    nodes *= a.hi > a.lo ? std::floor((a.hi - a.lo) / a.step + 1e-9) + 1.0 : 1.0;
  if (nodes > double(finite_sample_node_cap))
    throw SizeError("fsci: the joint grid would have about " + csv::format_number(nodes) +
                    " nodes, above the cap of 10^7; coarsen grid/beta-grid steps, narrow the "
                    "ranges or fix coordinates with lo:lo:1");
  const FiniteSampleRegion r = finite_sample_region(ds, tau, grid_of(axes), c.p, c.draws, c.seed);
  run.meta["critical"] = csv::format_number(r.critical);
  report_region(run, r.joint, coef_names(ds), r.projections);
  return 0;
}

int cmd_qte(Run& run)
{
  const RunConfig& c = run.cfg;
  const Dataset ds = load(c);
  if (ds.s() != 1)
    throw ConfigError("qte needs exactly one treatment column");
  if (c.tau.size() < 2)
    throw ConfigError("qte needs a tau list with at least two levels for the process");
  const Grid grid = grid_of(axes_for(c.grid, 1, "grid"));
  IqrOptions o;
  o.h = c.h;
  const QuantileProcess proc = monotonize(quantile_process(coefficient_process(ds, c.tau, grid, o)));
  const Vector d1 = Vector::Ones(1), d0 = Vector::Zero(1);
  const Vector x_ref = ds.x().colwise().mean().transpose();

  {
    std::ofstream f = run.open("process.csv");
    csv::Writer w(f);
    for (const auto& h : run.header())
      w.comment(h);
    std::vector<std::string> head{ "tau" };
    for (const auto& n : coef_names(ds))
      head.push_back(n);
    w.row(head);
    for (Index t = 0; t < proc.size(); ++t) {
      std::vector<std::string> row{ csv::format_number(proc.tau_grid[static_cast<std::size_t>(t)]) };
      row.push_back(csv::format_number(proc.alpha(t, 0)));
      for (Index j = 0; j < proc.beta.cols(); ++j)
        row.push_back(csv::format_number(proc.beta(t, j)));
      w.row(row);
    }
  }
  {
    std::ofstream f = run.open("qte.csv");
    write_qte_csv(f, qte_table(proc, ds, c.qte_tau, d1, d0, x_ref), run.header());
  }
  {
    if (c.cdf_points < 2)
      throw ConfigError("cdf-points must be at least 2");
    const auto [lo, hi] = outcome_bracket(ds);
    const UnconditionalCdf f1(proc, ds, d1), f0(proc, ds, d0);
    std::ofstream f = run.open("cdf.csv");
    csv::Writer w(f);
    for (const auto& h : run.header())
      w.comment(h);
    w.row({ "y", "cdf_d1", "cdf_d0" });
    for (int i = 0; i < c.cdf_points; ++i) {
      const double y = lo + (hi - lo) * i / (c.cdf_points - 1);
      w.row({ csv::format_number(y), csv::format_number(f1(y)), csv::format_number(f0(y)) });
    }
  }
  run.meta["x_ref"] = "column means of x";
  std::cout << "wrote process.csv, qte.csv and cdf.csv to " << c.out << "\n";
  return 0;
}

int cmd_simulate(Run& run)
{
  const RunConfig& c = run.cfg;
  if (c.design.size() != 1)
    throw ConfigError("design must be A, B or C");
  DgpDesign d;
  d.name = c.design[0];
  d.n = c.n;
  d.seed = c.seed;
  d.rho = c.rho;
  d.pi0 = c.pi0;
  d.pi1 = c.pi1;
  d.alpha0 = c.alpha0;
  d.alpha1 = c.alpha1;
  d.covariate_coef = c.covariate_coef;
  d.slippage_sd = c.slippage;
  const SimSample s = generate(d);
  {
    std::ofstream f = run.open("dataset.csv");
    write_dataset(s.data, f, run.header());
  }
  {
    std::ofstream f = run.open("oracle.csv");
    csv::Writer w(f);
    for (const auto& h : run.header())
      w.comment(h);
    w.row({ "u0", "u1", "y0", "y1" });
    for (Index i = 0; i < s.data.n(); ++i)
      w.row({ csv::format_number(s.u0(i)), csv::format_number(s.u1(i)), csv::format_number(s.y0(i)),
              csv::format_number(s.y1(i)) });
  }
  std::cout << "wrote dataset.csv and oracle.csv to " << c.out << "\n";
  return 0;
}

double arm_quantile(const Dataset& ds, double tau, double arm)
{
  std::vector<double> v;
  for (Index i = 0; i < ds.n(); ++i)
    if (ds.d()(i, 0) == arm)
      v.push_back(ds.y()(i));
  if (v.empty())
    throw DataError("no observations with d=" + csv::format_number(arm));
  std::sort(v.begin(), v.end());
  return sorted_quantile(v, tau);
}

int cmd_diagnose(Run& run)
{
  const RunConfig& c = run.cfg;
  const Dataset ds = load(c);
  std::vector<BinaryIdDiagnostic> rows;
  for (double tau : c.tau) {
    const double y0 = std::isnan(c.y0) ? arm_quantile(ds, tau, 0.0) : c.y0;
    const double y1 = std::isnan(c.y1) ? arm_quantile(ds, tau, 1.0) : c.y1;
    rows.push_back(diagnose_binary(ds, tau, y0, y1, c.h));
  }
  std::ofstream f = run.open("diagnostic.csv");
  write_diagnostic_csv(f, rows, run.header());
  std::ofstream kv = run.open("diagnostic.txt");
  for (const auto& h : run.header())
    kv << "# " << h << "\n";
  for (const auto& r : rows) {
    write_diagnostic_kv(kv, r);
    write_diagnostic_kv(std::cout, r);
  }
  return 0;
}

void machine_block(int code, const std::string& kind, const std::string& msg)
{
  std::cerr << "error: " << msg << "\n"
            << "# status\n"
            << "exit_code=" << code << "\n"
            << "error_kind=" << kind << "\n";
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Instrumental variable quantile regression: estimation, inference, QTE and simulation." };
  app.footer("Config file: flat key=value lines using the long option names above (for example "
             "tau=0.25,0.5). Command-line flags override file values, which override defaults.\n"
             "Exit codes: 0 success, 2 configuration error, 3 numerical failure.");
  app.set_version_flag("--version", tool_version);
  RunConfig c;
  app.set_config("--config", "", "flat key=value config file");
  app.add_option("command", c.command, "estimate | ci | fsci | qte | simulate | diagnose")
    ->required()
    ->check(CLI::IsMember({ "estimate", "ci", "fsci", "qte", "simulate", "diagnose" }));
  app.add_option("--data", c.data, "input CSV with a header row");
  app.add_option("--y", c.y, "outcome column")->capture_default_str();
  app.add_option("--d", c.d, "endogenous column(s)")->delimiter(',')->capture_default_str();
  app.add_option("--x", c.x, "exogenous column(s), include the intercept column")->delimiter(',')->capture_default_str();
  app.add_option("--z", c.z, "instrument column(s)")->delimiter(',')->capture_default_str();
  app.add_option("--tau", c.tau, "quantile level(s)")->delimiter(',')->capture_default_str();
  app.add_option("--method", c.method, "estimate: iqr|gmm|cue|qb (iqr); ci: ar|qlr|qlr2 (ar)");
  app.add_option("--profiling", c.profiling, "cue/qlr2 profiling path")
    ->check(CLI::IsMember({ "plain", "l1" }))
    ->capture_default_str();
  app.add_option("--grid", c.grid, "alpha grid lo:hi:step, one per endogenous column or one for all")
    ->capture_default_str();
  app.add_option("--beta-grid", c.beta_grid, "beta box/grid lo:hi:step for gmm, qb and fsci")
    ->capture_default_str();
  app.add_option("--p", c.p, "level p (regions have coverage 1-p)")->capture_default_str();
  app.add_option("--draws", c.draws, "simulation draws B")->capture_default_str();
  app.add_option("--seed", c.seed, "root seed")->capture_default_str();
  app.add_option("--bandwidth", c.h, "bandwidth override (0: default rule)")->capture_default_str();
  app.add_option("--out", c.out, "output directory")->capture_default_str();
  app.add_option("--threads", c.threads, "thread cap hint (0: all cores)")->capture_default_str();
  app.add_option("--iterations", c.iterations, "quasi-Bayes chain length")->capture_default_str();
  app.add_option("--burn-in", c.burn_in, "quasi-Bayes burn-in")->capture_default_str();
  app.add_option("--qte-tau", c.qte_tau, "levels reported in qte.csv")->delimiter(',')->capture_default_str();
  app.add_option("--cdf-points", c.cdf_points, "points in cdf.csv")->capture_default_str();
  app.add_option("--y0", c.y0, "diagnose: outcome point for d=0 (default: arm quantile)");
  app.add_option("--y1", c.y1, "diagnose: outcome point for d=1 (default: arm quantile)");
  app.add_option("--design", c.design, "simulate: A, B or C")->capture_default_str();
  app.add_option("--n", c.n, "simulate: sample size")->capture_default_str();
  app.add_option("--rho", c.rho, "simulate: endogeneity")->capture_default_str();
  app.add_option("--pi0", c.pi0, "simulate: selection intercept")->capture_default_str();
  app.add_option("--pi1", c.pi1, "simulate: instrument strength")->capture_default_str();
  app.add_option("--alpha0", c.alpha0, "simulate: alpha(tau) = alpha0 + alpha1 tau")->capture_default_str();
  app.add_option("--alpha1", c.alpha1, "simulate: slope of alpha(tau)")->capture_default_str();
  app.add_option("--covariate-coef", c.covariate_coef, "simulate: coefficients of extra covariates")
    ->delimiter(',');
  app.add_option("--slippage", c.slippage, "simulate: rank slippage sd (breaks rank similarity)")
    ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    machine_block(2, "config", e.what());
    return 2;
  }

  try {
    thread_hint() = c.threads;
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (!fs::is_directory(c.out))
      throw ConfigError("cannot create output directory: " + c.out);
    Run run{ c, config_hash(c), {} };
    int rc = 0;
    if (c.command == "estimate")
      rc = cmd_estimate(run);
    else if (c.command == "ci")
      rc = cmd_ci(run);
    else if (c.command == "fsci")
      rc = cmd_fsci(run);
    else if (c.command == "qte")
      rc = cmd_qte(run);
    else if (c.command == "simulate")
      rc = cmd_simulate(run);
    else
      rc = cmd_diagnose(run);
    run.write_meta();
    return rc;
  } catch (const ConfigError& e) {
    machine_block(2, "config", e.what());
    return 2;
  } catch (const ParseError& e) {
    machine_block(2, "parse", e.what());
    return 2;
  } catch (const SizeError& e) {
    machine_block(2, "size", e.what());
    return 2;
  } catch (const DomainError& e) {
    machine_block(2, "domain", e.what());
    return 2;
  } catch (const Error& e) {
    machine_block(3, "numerical", e.what());
    return 3;
  } catch (const std::exception& e) {
    machine_block(3, "internal", e.what());
    return 3;
  }
}
