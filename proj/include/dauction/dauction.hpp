#pragma once

#include "dauction/autodiff.hpp"
#include "dauction/baselines.hpp"
#include "dauction/checkpoint.hpp"
#include "dauction/config.hpp"
#include "dauction/errors.hpp"
#include "dauction/eval.hpp"
#include "dauction/grad_surgery.hpp"
#include "dauction/ic_estimator.hpp"
#include "dauction/io.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism.hpp"
#include "dauction/mechanism_net.hpp"
#include "dauction/outcome.hpp"
#include "dauction/params.hpp"
#include "dauction/rng.hpp"
#include "dauction/trainer.hpp"
