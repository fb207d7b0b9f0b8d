// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Umbrella header for the library and the training harness.

#pragma once

#include "altup/altup_layer.hpp"
#include "altup/cost_model.hpp"
#include "altup/errors.hpp"
#include "altup/grad_check.hpp"
#include "altup/gradcheck_suite.hpp"
#include "altup/harness/checkpoint.hpp"
#include "altup/harness/config.hpp"
#include "altup/harness/data.hpp"
#include "altup/harness/train.hpp"
#include "altup/lsh_analysis.hpp"
#include "altup/memory.hpp"
#include "altup/model.hpp"
#include "altup/rng.hpp"
#include "altup/seq_altup.hpp"
#include "altup/tensor.hpp"
#include "altup/transformer.hpp"
