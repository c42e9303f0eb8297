#pragma once

#include "slotalign/numkernel/adam.hpp"
#include "slotalign/numkernel/gradcheck.hpp"
#include "slotalign/numkernel/graph.hpp"
#include "slotalign/numkernel/init.hpp"
#include "slotalign/numkernel/ops.hpp"
#include "slotalign/numkernel/tensor.hpp"
