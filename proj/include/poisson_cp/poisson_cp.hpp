#ifndef POISSON_CP_POISSON_CP_HPP
#define POISSON_CP_POISSON_CP_HPP

#include "tensor.hpp"
#include "random.hpp"
#include "sampling.hpp"
#include "likelihood.hpp"
#include "lbfgsb.hpp"
#include "estimator.hpp"
#include "fim.hpp"
#include "minimax.hpp"
#include "experiments.hpp"

#endif  // POISSON_CP_POISSON_CP_HPP
