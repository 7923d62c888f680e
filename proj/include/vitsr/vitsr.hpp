#pragma once

// Umbrella header: the whole library.

#include "vitsr/checkpoint.hpp"
#include "vitsr/config.hpp"
#include "vitsr/data.hpp"
#include "vitsr/errors.hpp"
#include "vitsr/gradcheck.hpp"
#include "vitsr/image.hpp"
#include "vitsr/losses.hpp"
#include "vitsr/model.hpp"
#include "vitsr/ops.hpp"
#include "vitsr/optim.hpp"
#include "vitsr/png_io.hpp"
#include "vitsr/tensor.hpp"
#include "vitsr/train.hpp"
