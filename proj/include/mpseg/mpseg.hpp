#pragma once

// Umbrella header for the multi-planar sampling / fusion library.

#include "mpseg/augment.hpp"
#include "mpseg/errors.hpp"
#include "mpseg/evaluation.hpp"
#include "mpseg/fusion.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/io.hpp"
#include "mpseg/phantom.hpp"
#include "mpseg/pipeline.hpp"
#include "mpseg/predictor.hpp"
#include "mpseg/preprocess.hpp"
#include "mpseg/rng.hpp"
#include "mpseg/sampler.hpp"
#include "mpseg/stats.hpp"
#include "mpseg/views.hpp"
#include "mpseg/volume.hpp"
