#pragma once

#include "bdvar/errors.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/random.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/quadrature.hpp"
#include "bdvar/drift_class.hpp"
#include "bdvar/functional.hpp"
#include "bdvar/wiener_core.hpp"
#include "bdvar/variational.hpp"
#include "bdvar/convex.hpp"
#include "bdvar/prekopa.hpp"
#include "bdvar/bl_appendix.hpp"
#include "bdvar/experiment.hpp"
