#pragma once

#include "ebm/core.hpp"
#include "ebm/densities.hpp"
#include "ebm/divergences.hpp"
#include "ebm/energies.hpp"
#include "ebm/flows.hpp"
#include "ebm/io.hpp"
#include "ebm/mlp.hpp"
#include "ebm/physics.hpp"
#include "ebm/samplers.hpp"
#include "ebm/training.hpp"

