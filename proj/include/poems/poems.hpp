#pragma once

// Umbrella header: the full library surface.

#include "poems/checks.hpp"
#include "poems/config.hpp"
#include "poems/data.hpp"
#include "poems/errors.hpp"
#include "poems/eval.hpp"
#include "poems/gradcheck.hpp"
#include "poems/interpret.hpp"
#include "poems/io.hpp"
#include "poems/matrix.hpp"
#include "poems/mlp.hpp"
#include "poems/model.hpp"
#include "poems/objective.hpp"
#include "poems/optim.hpp"
#include "poems/rng.hpp"
#include "poems/ssl.hpp"
