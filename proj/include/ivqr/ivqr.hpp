#pragma once

#include "csv.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "identification.hpp"
#include "iqr.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "orthogonal.hpp"
#include "quantreg.hpp"
#include "quasi_bayes.hpp"
#include "qte.hpp"
#include "rng.hpp"
#include "robust.hpp"
#include "simulation.hpp"
