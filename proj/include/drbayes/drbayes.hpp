#pragma once

#include "drbayes/error.hpp"
#include "drbayes/numeric.hpp"
#include "drbayes/random.hpp"
#include "drbayes/data.hpp"
#include "drbayes/models.hpp"
#include "drbayes/posteriors.hpp"
#include "drbayes/moments.hpp"
#include "drbayes/tilting.hpp"
#include "drbayes/estimators.hpp"
#include "drbayes/sensitivity.hpp"
#include "drbayes/selection.hpp"
#include "drbayes/simulation.hpp"
