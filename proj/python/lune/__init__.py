"""Python access to the LUNE C++ core."""

from ._lune import (
    AdaptedModel,
    ConfigError,
    IoError,
    LuneError,
    ModelConfig,
    Tokenizer,
    TrainingError,
    TransformerModel,
    affirms_object,
    config_keys,
    config_toml,
    config_value,
    count_lora_params,
    count_params,
    generate_corpus,
    gradcheck,
    inject,
    mia_accuracy,
    projection_suite,
    read_report,
    version,
)

__version__ = version()
