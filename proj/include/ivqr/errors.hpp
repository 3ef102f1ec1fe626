#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ivqr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Bad column roles, duplicated labels, inconsistent options.
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// Malformed input file. `row()` is the 1-based data row (0 for the header).
class ParseError : public Error
{
public:
  ParseError(const std::string& what, std::size_t row)
    : Error(what)
    , row_(row)
  {}
  std::size_t row() const { return row_; }

private:
  std::size_t row_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error
{
public:
  using Error::Error;
};

/// Data that cannot support the requested computation (e.g. an empty cell).
class DataError : public Error
{
public:
  using Error::Error;
};

/// Iterative solver failed; carries the last iterate.
class SolverError : public Error
{
public:
  SolverError(const std::string& what, Eigen::VectorXd last_iterate, double gap = 0.0)
    : Error(what)
    , last_(std::move(last_iterate))
    , gap_(gap)
  {}
  const Eigen::VectorXd& last_iterate() const { return last_; }
  double gap() const { return gap_; }

private:
  Eigen::VectorXd last_;
  double gap_;
};

/// Matrix that had to be inverted is (numerically) singular.
class SingularityError : public Error
{
public:
  SingularityError(const std::string& what, double condition_number)
    : Error(what)
    , cond_(condition_number)
  {}
  double condition_number() const { return cond_; }

private:
  double cond_;
};

/// The point-estimate sandwich is singular: the parameter is weakly or not
/// identified and only the robust confidence sets should be used.
class WeakIdentificationError : public SingularityError
{
public:
  using SingularityError::SingularityError;
};

/// Requested computation exceeds the supported problem size.
class SizeError : public Error
{
public:
  using Error::Error;
};

} // namespace ivqr
