#pragma once

#include "divo/actor.hpp"
#include "divo/runtime.hpp"
#include "divo/approximator.hpp"
#include "divo/baselines.hpp"
#include "divo/config.hpp"
#include "divo/critics.hpp"
#include "divo/dataset.hpp"
#include "divo/diffusion.hpp"
#include "divo/envs.hpp"
#include "divo/errors.hpp"
#include "divo/metrics.hpp"
#include "divo/random.hpp"
#include "divo/trainer.hpp"
