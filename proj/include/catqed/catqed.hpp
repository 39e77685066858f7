#pragma once

#include "catqed/errors.hpp"
#include "catqed/hilbert.hpp"
#include "catqed/tensor_operator.hpp"
#include "catqed/states.hpp"
#include "catqed/model.hpp"
#include "catqed/dynamics.hpp"
#include "catqed/analysis.hpp"
#include "catqed/config.hpp"
#include "catqed/experiment.hpp"
