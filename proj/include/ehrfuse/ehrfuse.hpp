#pragma once

#include "ehrfuse/cache.hpp"
#include "ehrfuse/config.hpp"
#include "ehrfuse/corruption.hpp"
#include "ehrfuse/csv.hpp"
#include "ehrfuse/dataset.hpp"
#include "ehrfuse/embedding.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/fusion.hpp"
#include "ehrfuse/heads.hpp"
#include "ehrfuse/matrix.hpp"
#include "ehrfuse/metrics.hpp"
#include "ehrfuse/model.hpp"
#include "ehrfuse/prompt.hpp"
#include "ehrfuse/prompt_template.hpp"
#include "ehrfuse/random.hpp"
#include "ehrfuse/report.hpp"
#include "ehrfuse/schema.hpp"
#include "ehrfuse/synth.hpp"
#include "ehrfuse/train.hpp"
