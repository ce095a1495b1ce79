#pragma once

#include "fusedtree/errors.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/penalty.hpp"
#include "fusedtree/survival.hpp"
#include "fusedtree/tree.hpp"
#include "fusedtree/estimator.hpp"
#include "fusedtree/tuning.hpp"
#include "fusedtree/model.hpp"
#include "fusedtree/pipeline.hpp"
#include "fusedtree/metrics.hpp"
#include "fusedtree/nodetest.hpp"
#include "fusedtree/simulate.hpp"
#include "fusedtree/io.hpp"
