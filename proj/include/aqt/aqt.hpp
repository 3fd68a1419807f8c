#pragma once

#include "aqt/checkpoint.hpp"
#include "aqt/density.hpp"
#include "aqt/error.hpp"
#include "aqt/experiments.hpp"
#include "aqt/fidelity.hpp"
#include "aqt/linalg.hpp"
#include "aqt/model.hpp"
#include "aqt/povm.hpp"
#include "aqt/reconstruct.hpp"
#include "aqt/rng.hpp"
#include "aqt/states.hpp"
#include "aqt/train.hpp"
