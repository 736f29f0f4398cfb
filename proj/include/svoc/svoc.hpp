#pragma once

#include "adjoint.hpp"
#include "core.hpp"
#include "expr.hpp"
#include "forward.hpp"
#include "linear.hpp"
#include "mp.hpp"
#include "problem_io.hpp"
#include "quadrature.hpp"
#include "special_functions.hpp"
