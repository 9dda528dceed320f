#pragma once

#include "attack_sim.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "mechanisms.hpp"
#include "numeric.hpp"
#include "predictors.hpp"
#include "privacy.hpp"
#include "rng.hpp"
