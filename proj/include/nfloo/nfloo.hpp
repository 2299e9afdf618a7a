#pragma once

#include "nfloo/covkit.hpp"
#include "nfloo/draws.hpp"
#include "nfloo/errors.hpp"
#include "nfloo/exact_loo.hpp"
#include "nfloo/fit.hpp"
#include "nfloo/io.hpp"
#include "nfloo/mcmc.hpp"
#include "nfloo/pointwise_loo.hpp"
#include "nfloo/psis.hpp"
#include "nfloo/report.hpp"
#include "nfloo/rng.hpp"
#include "nfloo/sar_model.hpp"
#include "nfloo/transforms.hpp"
