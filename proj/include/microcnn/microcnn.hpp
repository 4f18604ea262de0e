#pragma once

#include "microcnn/checkpoint.hpp"
#include "microcnn/cli.hpp"
#include "microcnn/config.hpp"
#include "microcnn/data.hpp"
#include "microcnn/errors.hpp"
#include "microcnn/image.hpp"
#include "microcnn/layers.hpp"
#include "microcnn/loss_optim.hpp"
#include "microcnn/model.hpp"
#include "microcnn/rng.hpp"
#include "microcnn/tensor.hpp"
#include "microcnn/training.hpp"
