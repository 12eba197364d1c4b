#pragma once

#include "stprev/error.hpp"
#include "stprev/rng.hpp"
#include "stprev/parallel.hpp"
#include "stprev/numeric.hpp"
#include "stprev/optim.hpp"
#include "stprev/covariance.hpp"
#include "stprev/survey_data.hpp"
#include "stprev/model.hpp"
#include "stprev/exploratory.hpp"
#include "stprev/diagnostics.hpp"
#include "stprev/latent.hpp"
#include "stprev/mcml.hpp"
#include "stprev/bayes.hpp"
#include "stprev/prediction.hpp"
#include "stprev/serialize.hpp"
#include "stprev/bundle.hpp"
