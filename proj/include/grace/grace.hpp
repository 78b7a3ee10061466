#pragma once

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/dataset.hpp"
#include "grace/decoders.hpp"
#include "grace/encoders.hpp"
#include "grace/geometry.hpp"
#include "grace/hfem.hpp"
#include "grace/image.hpp"
#include "grace/io.hpp"
#include "grace/losses.hpp"
#include "grace/metrics.hpp"
#include "grace/mffm.hpp"
#include "grace/model.hpp"
#include "grace/nn.hpp"
#include "grace/synthetic.hpp"
#include "grace/training.hpp"
#include "grace/types.hpp"
