// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "liger/attention.hpp"
#include "liger/checkpoint.hpp"
#include "liger/config.hpp"
#include "liger/corpus.hpp"
#include "liger/decode.hpp"
#include "liger/equiv.hpp"
#include "liger/errors.hpp"
#include "liger/gated.hpp"
#include "liger/gating.hpp"
#include "liger/lora.hpp"
#include "liger/metrics.hpp"
#include "liger/model.hpp"
#include "liger/ops.hpp"
#include "liger/optim.hpp"
#include "liger/pipeline.hpp"
#include "liger/rng.hpp"
#include "liger/tensor.hpp"
#include "liger/workflow.hpp"
