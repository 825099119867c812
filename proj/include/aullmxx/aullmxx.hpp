#ifndef AULLMXX_AULLMXX_HPP
#define AULLMXX_AULLMXX_HPP

#include "aullmxx/core/autograd.hpp"
#include "aullmxx/core/checkpoint.hpp"
#include "aullmxx/core/config.hpp"
#include "aullmxx/core/error.hpp"
#include "aullmxx/core/gradcheck.hpp"
#include "aullmxx/core/ops.hpp"
#include "aullmxx/core/ops_nn.hpp"
#include "aullmxx/core/params.hpp"
#include "aullmxx/core/rng.hpp"
#include "aullmxx/core/tensor.hpp"
#include "aullmxx/data/manifest.hpp"
#include "aullmxx/data/splits.hpp"
#include "aullmxx/data/synthetic.hpp"
#include "aullmxx/data/types.hpp"
#include "aullmxx/eval/metrics.hpp"
#include "aullmxx/eval/protocol.hpp"
#include "aullmxx/eval/report.hpp"
#include "aullmxx/model/backbone.hpp"
#include "aullmxx/model/mge_efp.hpp"
#include "aullmxx/model/pipeline.hpp"
#include "aullmxx/model/r_augnn.hpp"
#include "aullmxx/model/reasoner.hpp"
#include "aullmxx/train/gradsuite.hpp"
#include "aullmxx/train/objective.hpp"
#include "aullmxx/train/optimizer.hpp"
#include "aullmxx/train/train_config.hpp"
#include "aullmxx/train/trainer.hpp"

#endif  // AULLMXX_AULLMXX_HPP
