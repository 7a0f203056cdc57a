#pragma once

#include "stkd/numerics/adam.hpp"
#include "stkd/numerics/autodiff.hpp"
#include "stkd/numerics/gradcheck.hpp"
#include "stkd/numerics/losses.hpp"
#include "stkd/numerics/ops.hpp"
#include "stkd/numerics/params.hpp"
#include "stkd/numerics/tensor.hpp"
