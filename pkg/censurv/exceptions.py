class CenSurvError(Exception):
    """censurv所有异常的基类.
    """


class ValidationError(CenSurvError, ValueError):
    """输入不满足前置条件或不变量.
    """


class ShapeError(ValidationError):
    """算子输入形状不兼容.
    """
    def __init__(self, op, shapes, detail=None):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        message = "op '%s' got incompatible shapes %s" % (
            op, ', '.join(str(s) for s in self.shapes))
        if detail:
            message = '%s: %s' % (message, detail)
        super(ShapeError, self).__init__(message)


class ConfigError(ValidationError):
    """超参数或配置项非法.
    """


class UndefinedStatisticError(ValidationError):
    """统计量无定义, 比如没有可比较对的C-index.
    """


class DatasetError(ValidationError):
    """数据集文件不满足schema, 定位到文件和字段.
    """
    def __init__(self, path, field, reason):
        self.path = str(path)
        self.field = field
        self.reason = reason
        super(DatasetError, self).__init__(
            '%s [%s]: %s' % (self.path, field, reason))


class MetricsWriteError(CenSurvError, OSError):
    """结果文件写入失败.
    """
    def __init__(self, path, reason):
        self.path = str(path)
        super(MetricsWriteError, self).__init__(
            'failed to write %s: %s' % (self.path, reason))
