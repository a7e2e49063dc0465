#pragma once

#include "ocn/autodiff.hpp"
#include "ocn/cmc.hpp"
#include "ocn/eval.hpp"
#include "ocn/gradcheck.hpp"
#include "ocn/gradsuite.hpp"
#include "ocn/hungarian.hpp"
#include "ocn/infer.hpp"
#include "ocn/io.hpp"
#include "ocn/matrix.hpp"
#include "ocn/model.hpp"
#include "ocn/priors.hpp"
#include "ocn/rng.hpp"
#include "ocn/runner.hpp"
#include "ocn/setmatch.hpp"
#include "ocn/synth.hpp"
#include "ocn/train.hpp"
#include "ocn/vsm.hpp"
