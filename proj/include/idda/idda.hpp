#pragma once

// Everything in one include.

#include "idda/tensor.hpp"
#include "idda/rng.hpp"
#include "idda/autodiff.hpp"
#include "idda/optim.hpp"
#include "idda/gradcheck.hpp"
#include "idda/model.hpp"
#include "idda/image_io.hpp"
#include "idda/datasets.hpp"
#include "idda/checkpoint.hpp"
#include "idda/trainer.hpp"
#include "idda/analysis/proxy_a.hpp"
#include "idda/analysis/hdh.hpp"
#include "idda/analysis/nemenyi.hpp"
#include "idda/analysis/purity.hpp"
#include "idda/analysis/export.hpp"
#include "idda/experiments.hpp"
#include "idda/analysis/sweep.hpp"
#include "idda/config.hpp"
#include "idda/runtime.hpp"
