#pragma once

#include "dibo/error.hpp"
#include "dibo/rng.hpp"
#include "dibo/oracle.hpp"
#include "dibo/pool.hpp"
#include "dibo/text.hpp"
#include "dibo/vocab.hpp"
#include "dibo/autograd.hpp"
#include "dibo/model.hpp"
#include "dibo/optim.hpp"
#include "dibo/train.hpp"
#include "dibo/corpus.hpp"
#include "dibo/decode.hpp"
#include "dibo/eval.hpp"
#include "dibo/config.hpp"
#include "dibo/pipeline.hpp"
