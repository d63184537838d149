#pragma once

#include "msgnet/adam.hpp"
#include "msgnet/errors.hpp"
#include "msgnet/gram.hpp"
#include "msgnet/image.hpp"
#include "msgnet/linalg.hpp"
#include "msgnet/loss.hpp"
#include "msgnet/network.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/runtime.hpp"
#include "msgnet/serialize.hpp"
#include "msgnet/tensor.hpp"
#include "msgnet/train.hpp"
