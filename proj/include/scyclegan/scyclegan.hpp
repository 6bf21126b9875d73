#pragma once

#include "scyclegan/errors.hpp"
#include "scyclegan/tensor.hpp"
#include "scyclegan/autograd.hpp"
#include "scyclegan/conv.hpp"
#include "scyclegan/rng.hpp"
#include "scyclegan/image.hpp"
#include "scyclegan/fan.hpp"
#include "scyclegan/png_io.hpp"
#include "scyclegan/dataset.hpp"
#include "scyclegan/phantom.hpp"
#include "scyclegan/networks.hpp"
#include "scyclegan/losses.hpp"
#include "scyclegan/optim.hpp"
#include "scyclegan/config.hpp"
#include "scyclegan/models.hpp"
#include "scyclegan/checkpoint.hpp"
#include "scyclegan/metrics.hpp"
#include "scyclegan/trainer.hpp"
#include "scyclegan/eval.hpp"
#include "scyclegan/gradcheck.hpp"
