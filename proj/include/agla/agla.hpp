#pragma once

#include "agla/error.hpp"
#include "agla/ndmath.hpp"
#include "agla/nets.hpp"
#include "agla/param_io.hpp"
#include "agla/losses.hpp"
#include "agla/dataset.hpp"
#include "agla/datasets.hpp"
#include "agla/transforms.hpp"
#include "agla/memory.hpp"
#include "agla/cos.hpp"
#include "agla/eval.hpp"
#include "agla/continual.hpp"
#include "agla/csv.hpp"
#include "agla/experiment.hpp"
