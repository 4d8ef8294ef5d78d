#pragma once

#include "fcmnet/accounting.hpp"
#include "fcmnet/archive.hpp"
#include "fcmnet/backbone.hpp"
#include "fcmnet/blocks.hpp"
#include "fcmnet/config.hpp"
#include "fcmnet/io.hpp"
#include "fcmnet/ops.hpp"
#include "fcmnet/rng.hpp"
#include "fcmnet/tape.hpp"
#include "fcmnet/tensor.hpp"
#include "fcmnet/toml.hpp"
#include "fcmnet/train.hpp"
#include "fcmnet/verification.hpp"
