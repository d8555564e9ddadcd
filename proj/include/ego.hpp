// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header. ego/http_judge.hpp is separate: it needs cpp-httplib.

#pragma once

#include "ego/adapter.hpp"
#include "ego/attention.hpp"
#include "ego/backend.hpp"
#include "ego/calibration.hpp"
#include "ego/error.hpp"
#include "ego/eval.hpp"
#include "ego/judge.hpp"
#include "ego/library_io.hpp"
#include "ego/matrix.hpp"
#include "ego/memory.hpp"
#include "ego/pipeline.hpp"
#include "ego/scripted_backend.hpp"
#include "ego/synthetic.hpp"
#include "ego/templates.hpp"
#include "ego/tensor_io.hpp"
#include "ego/toy_backend.hpp"
#include "ego/toy_image.hpp"
#include "ego/view.hpp"
