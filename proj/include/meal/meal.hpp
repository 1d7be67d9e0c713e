#pragma once

// Umbrella header for the MEAL library.

#include "meal/augment.hpp"
#include "meal/autograd.hpp"
#include "meal/backbone.hpp"
#include "meal/checkpoint.hpp"
#include "meal/dataset.hpp"
#include "meal/errors.hpp"
#include "meal/evaluate.hpp"
#include "meal/interp.hpp"
#include "meal/metrics.hpp"
#include "meal/models.hpp"
#include "meal/nifti.hpp"
#include "meal/ops.hpp"
#include "meal/phantom.hpp"
#include "meal/report.hpp"
#include "meal/rng.hpp"
#include "meal/run.hpp"
#include "meal/stats.hpp"
#include "meal/tensor.hpp"
#include "meal/train.hpp"
#include "meal/volume.hpp"
