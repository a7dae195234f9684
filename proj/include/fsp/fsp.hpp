#pragma once

// Umbrella header.

#include "fsp/autodiff.hpp"
#include "fsp/checkpoint.hpp"
#include "fsp/config.hpp"
#include "fsp/dataset.hpp"
#include "fsp/eval.hpp"
#include "fsp/metrics.hpp"
#include "fsp/model.hpp"
#include "fsp/objectives.hpp"
#include "fsp/ops.hpp"
#include "fsp/optim.hpp"
#include "fsp/report.hpp"
#include "fsp/rng.hpp"
#include "fsp/tasks.hpp"
#include "fsp/teacher.hpp"
#include "fsp/tensor.hpp"
#include "fsp/tfidf.hpp"
#include "fsp/train.hpp"
