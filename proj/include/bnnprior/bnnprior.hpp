#pragma once

#include "bnnprior/baseline.hpp"
#include "bnnprior/datasets.hpp"
#include "bnnprior/error.hpp"
#include "bnnprior/evidence.hpp"
#include "bnnprior/experiment.hpp"
#include "bnnprior/mcmc.hpp"
#include "bnnprior/metrics.hpp"
#include "bnnprior/network.hpp"
#include "bnnprior/prediction_io.hpp"
#include "bnnprior/priors.hpp"
#include "bnnprior/random.hpp"
#include "bnnprior/trace_io.hpp"
