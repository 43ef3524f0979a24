#pragma once

#include "twinpair/errors.hpp"
#include "twinpair/count_dist.hpp"
#include "twinpair/distributions.hpp"
#include "twinpair/detection.hpp"
#include "twinpair/pairing.hpp"
#include "twinpair/composite.hpp"
#include "twinpair/simulator.hpp"
#include "twinpair/analysis.hpp"
#include "twinpair/io.hpp"
#include "twinpair/config.hpp"
#include "twinpair/version.hpp"
