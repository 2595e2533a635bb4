#pragma once

#include "error.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "data_model.hpp"
#include "preprocess.hpp"
#include "simindex.hpp"
#include "cluster.hpp"
#include "evalmetrics.hpp"
#include "gp.hpp"
#include "mcdnn.hpp"
#include "model_io.hpp"
#include "synthgen.hpp"
#include "run_config.hpp"
#include "pipeline.hpp"
