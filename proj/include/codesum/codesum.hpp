#pragma once

// Umbrella header.

#include "codesum/checkpoint.hpp"
#include "codesum/common.hpp"
#include "codesum/contrastive.hpp"
#include "codesum/corpus.hpp"
#include "codesum/finetune.hpp"
#include "codesum/generate.hpp"
#include "codesum/metrics.hpp"
#include "codesum/ops.hpp"
#include "codesum/optim.hpp"
#include "codesum/pipeline.hpp"
#include "codesum/refine.hpp"
#include "codesum/retriever.hpp"
#include "codesum/serialize.hpp"
#include "codesum/tensor.hpp"
#include "codesum/transformer.hpp"
#include "codesum/vocab.hpp"
