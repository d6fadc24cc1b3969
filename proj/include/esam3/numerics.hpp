#pragma once

#include "esam3/numerics/grad_check.hpp"
#include "esam3/numerics/kernels.hpp"
#include "esam3/numerics/serialize.hpp"
#include "esam3/numerics/tape.hpp"
#include "esam3/numerics/tensor.hpp"
