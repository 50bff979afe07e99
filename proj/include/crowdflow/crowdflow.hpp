#pragma once

#include "crowdflow/autodiff.hpp"
#include "crowdflow/baseline.hpp"
#include "crowdflow/common.hpp"
#include "crowdflow/core.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/density.hpp"
#include "crowdflow/dvcg.hpp"
#include "crowdflow/metrics.hpp"
#include "crowdflow/ode.hpp"
#include "crowdflow/predictor.hpp"
#include "crowdflow/simulate.hpp"
#include "crowdflow/training.hpp"
