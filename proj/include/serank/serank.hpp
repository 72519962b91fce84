#pragma once

#include "serank/autodiff.hpp"
#include "serank/config.hpp"
#include "serank/experiments.hpp"
#include "serank/flops.hpp"
#include "serank/letor.hpp"
#include "serank/losses.hpp"
#include "serank/metrics.hpp"
#include "serank/models.hpp"
#include "serank/random.hpp"
#include "serank/tensor.hpp"
#include "serank/trainer.hpp"
