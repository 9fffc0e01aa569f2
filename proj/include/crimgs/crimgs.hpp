#pragma once

#include "crimgs/autodiff/adam.hpp"
#include "crimgs/autodiff/conv.hpp"
#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/autodiff/ops.hpp"
#include "crimgs/autodiff/tensor.hpp"
#include "crimgs/blurkernel.hpp"
#include "crimgs/camera.hpp"
#include "crimgs/checkpoint.hpp"
#include "crimgs/compositor.hpp"
#include "crimgs/config.hpp"
#include "crimgs/errors.hpp"
#include "crimgs/image.hpp"
#include "crimgs/liegroup.hpp"
#include "crimgs/loss.hpp"
#include "crimgs/nn.hpp"
#include "crimgs/ode.hpp"
#include "crimgs/scenedata.hpp"
#include "crimgs/selftest.hpp"
#include "crimgs/splat.hpp"
#include "crimgs/trainer.hpp"
