from .dataset import TimeSeriesDataset, read_dataset, write_dataset
from .model import DiscriminatorConfig, EncoderConfig, ModelCheckpoint, load_checkpoint, save_checkpoint
from .simgen import GeneratorSpec, HmmSpec, assemble_dataset, default_generator_spec, default_hmm_spec
from .stationarity import AdfResult, NeighborhoodSpec, adf_test, estimate_eta
from .train import TrainConfig, train, tnc_loss

__version__ = "0.1.0"
