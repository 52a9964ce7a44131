# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.


class TrainingCallback:

    def on_train_loss_report(self, train_info: dict):
        """Called at the end of every offline epoch with the train loss."""
        pass

    def on_val_loss_report(self, val_info: dict):
        """Called after every validation pass."""
        pass


class HistoryCallback(TrainingCallback):
    """Keeps every report so runs can be written to disk or inspected."""

    def __init__(self, wrapped_callback: TrainingCallback = None):
        self.train_history = []
        self.val_history = []
        self.wrapped_callback = wrapped_callback

    def on_train_loss_report(self, train_info: dict):
        self.train_history.append(dict(train_info))
        if self.wrapped_callback:
            self.wrapped_callback.on_train_loss_report(train_info)

    def on_val_loss_report(self, val_info: dict):
        self.val_history.append(dict(val_info))
        if self.wrapped_callback:
            self.wrapped_callback.on_val_loss_report(val_info)
