#pragma once

// Umbrella header for the whole toolkit.

#include "mixlogit/math.hpp"
#include "mixlogit/halton.hpp"
#include "mixlogit/dataset.hpp"
#include "mixlogit/crash_data.hpp"
#include "mixlogit/model_spec.hpp"
#include "mixlogit/likelihood.hpp"
#include "mixlogit/linalg.hpp"
#include "mixlogit/estimator.hpp"
#include "mixlogit/inference.hpp"
#include "mixlogit/synthetic.hpp"
#include "mixlogit/report.hpp"
#include "mixlogit/pipeline.hpp"
