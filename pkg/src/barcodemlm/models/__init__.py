from barcodemlm.models.cnn import BarcodeCNN, CNNConfig, ConvStage
from barcodemlm.models.encoder import (
    BarcodeEncoder,
    ClassifierHead,
    EncoderConfig,
    MaskedLM,
    MLMHead,
    SequenceClassifier,
    mlm_loss,
    pool_embeddings,
)
from barcodemlm.models.io import load_model, save_model
from barcodemlm.models.training import (
    PretrainSpec,
    SupervisedSpec,
    TrainingHistory,
    masked_token_accuracy,
    predict,
    run_mlm_pretraining,
    run_supervised_training,
)

__all__ = [
    "BarcodeCNN", "BarcodeEncoder", "CNNConfig", "ClassifierHead", "ConvStage", "EncoderConfig",
    "MLMHead", "MaskedLM", "PretrainSpec", "SequenceClassifier", "SupervisedSpec", "TrainingHistory",
    "load_model", "masked_token_accuracy", "mlm_loss", "pool_embeddings", "predict",
    "run_mlm_pretraining", "run_supervised_training", "save_model",
]
