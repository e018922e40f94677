#pragma once

#include "lpattn/attention.hpp"
#include "lpattn/checkpoint.hpp"
#include "lpattn/data.hpp"
#include "lpattn/error.hpp"
#include "lpattn/harness.hpp"
#include "lpattn/model.hpp"
#include "lpattn/ops.hpp"
#include "lpattn/optim.hpp"
#include "lpattn/report.hpp"
#include "lpattn/rng.hpp"
#include "lpattn/selftest.hpp"
#include "lpattn/tensor.hpp"
#include "lpattn/training.hpp"
