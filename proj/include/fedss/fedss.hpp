#pragma once

#include "fedss/adaptive_threshold.hpp"
#include "fedss/cli.hpp"
#include "fedss/config.hpp"
#include "fedss/datasets.hpp"
#include "fedss/error.hpp"
#include "fedss/federation.hpp"
#include "fedss/matrix.hpp"
#include "fedss/metrics.hpp"
#include "fedss/mtae.hpp"
#include "fedss/nn.hpp"
#include "fedss/outlier.hpp"
#include "fedss/report.hpp"
#include "fedss/rng.hpp"
#include "fedss/svdd.hpp"
