#ifndef SPENV_SPENV_HPP
#define SPENV_SPENV_HPP

#include "spenv/errors.hpp"
#include "spenv/matalg.hpp"
#include "spenv/spatialcov.hpp"
#include "spenv/model.hpp"
#include "spenv/envopt.hpp"
#include "spenv/inference.hpp"
#include "spenv/predict.hpp"
#include "spenv/evalsim.hpp"

#endif  // SPENV_SPENV_HPP
