"""rnncast: peephole-LSTM and GRU forecasting for daily OHLCV price series."""

__version__ = "0.1.0"
