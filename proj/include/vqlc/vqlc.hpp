#pragma once

#include "vqlc/assigner.hpp"
#include "vqlc/baselines.hpp"
#include "vqlc/checkpoint.hpp"
#include "vqlc/concepts.hpp"
#include "vqlc/dataset.hpp"
#include "vqlc/decoder.hpp"
#include "vqlc/encoder.hpp"
#include "vqlc/error.hpp"
#include "vqlc/eval/ari.hpp"
#include "vqlc/eval/bench.hpp"
#include "vqlc/eval/faithfulness.hpp"
#include "vqlc/eval/judge.hpp"
#include "vqlc/eval/probe.hpp"
#include "vqlc/eval/rank.hpp"
#include "vqlc/memory.hpp"
#include "vqlc/nn.hpp"
#include "vqlc/quantizer.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"
#include "vqlc/trainer.hpp"
