// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "liso/bitstream.hpp"
#include "liso/checkpoint.hpp"
#include "liso/error.hpp"
#include "liso/imageio.hpp"
#include "liso/jpeg.hpp"
#include "liso/losses.hpp"
#include "liso/metrics.hpp"
#include "liso/nets.hpp"
#include "liso/optim.hpp"
#include "liso/steganalysis.hpp"
#include "liso/synth.hpp"
#include "liso/tensor.hpp"
#include "liso/train.hpp"
