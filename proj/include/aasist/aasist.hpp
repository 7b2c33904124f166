#pragma once

#include "aasist/checkpoint.hpp"
#include "aasist/config.hpp"
#include "aasist/encoder.hpp"
#include "aasist/grad_check.hpp"
#include "aasist/graph.hpp"
#include "aasist/hetero.hpp"
#include "aasist/layers.hpp"
#include "aasist/metrics.hpp"
#include "aasist/model.hpp"
#include "aasist/ops.hpp"
#include "aasist/optim.hpp"
#include "aasist/rng.hpp"
#include "aasist/scores.hpp"
#include "aasist/tensor.hpp"
#include "aasist/train.hpp"
#include "aasist/wav.hpp"
