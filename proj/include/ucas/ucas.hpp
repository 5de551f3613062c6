#pragma once

#include "ucas/advantage.hpp"
#include "ucas/checkpoint.hpp"
#include "ucas/config.hpp"
#include "ucas/environment.hpp"
#include "ucas/error.hpp"
#include "ucas/evaluation.hpp"
#include "ucas/metrics.hpp"
#include "ucas/numerics.hpp"
#include "ucas/policy.hpp"
#include "ucas/trace.hpp"
#include "ucas/trainer.hpp"
#include "ucas/vocabulary.hpp"
