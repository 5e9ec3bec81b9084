// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tpool/checkpoint.hpp"
#include "tpool/cli.hpp"
#include "tpool/config.hpp"
#include "tpool/error.hpp"
#include "tpool/layers.hpp"
#include "tpool/metrics.hpp"
#include "tpool/model.hpp"
#include "tpool/normact.hpp"
#include "tpool/pooling.hpp"
#include "tpool/rng.hpp"
#include "tpool/seqdata.hpp"
#include "tpool/tensor.hpp"
#include "tpool/train.hpp"
#include "tpool/types.hpp"
#include "tpool/verify.hpp"
