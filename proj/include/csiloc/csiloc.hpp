#pragma once

#include "csiloc/data.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/gradcheck.hpp"
#include "csiloc/io.hpp"
#include "csiloc/layers.hpp"
#include "csiloc/loss.hpp"
#include "csiloc/metrics.hpp"
#include "csiloc/models.hpp"
#include "csiloc/optim.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"
#include "csiloc/train.hpp"
