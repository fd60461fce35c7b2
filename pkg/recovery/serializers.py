from django.core.exceptions import ValidationError

from forward.models import BoundaryData, DNMeasurement

from .models import Experiment, MeasurementSet


class MeasurementTextSerializer:
    """
    Line-oriented measurement format::

        MEAS v1
        GAMMA <n> <noise_level>
        EXPERIMENTS <count>
        ORDER <p> <q>                (then three rows of n values: f1, f2, data)

    Values refer to the Γ nodes of the mesh the file is read against.
    """

    HEADER = 'MEAS v1'

    @staticmethod
    def _row(values):
        return ' '.join(repr(float(v)) for v in values)

    def dumps(self, measurements):
        n_gamma = len(measurements.mesh.gamma_nodes)
        lines = [
            self.HEADER,
            f"GAMMA {n_gamma} {float(measurements.noise_level)!r}",
            f"EXPERIMENTS {len(measurements)}",
        ]
        for experiment in measurements:
            lines.append(f"ORDER {experiment.order[0]} {experiment.order[1]}")
            lines.append(self._row(experiment.f1.values))
            lines.append(self._row(experiment.f2.values))
            lines.append(self._row(experiment.measurement.values))
        return '\n'.join(lines) + '\n'

    def loads(self, text, mesh):
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or lines[0] != self.HEADER:
            raise ValidationError("Missing 'MEAS v1' header", code='invalid_measurement_file')
        try:
            key, n_gamma, noise_level = lines[1].split()
            count_key, count = lines[2].split()
            if key != 'GAMMA' or count_key != 'EXPERIMENTS':
                raise ValueError("expected GAMMA and EXPERIMENTS blocks")
            if int(n_gamma) != len(mesh.gamma_nodes):
                raise ValidationError(
                    f"File holds {n_gamma} Gamma values, mesh has {len(mesh.gamma_nodes)}",
                    code='dimension_mismatch',
                )
            measurements = MeasurementSet(mesh, noise_level=float(noise_level))
            for i in range(int(count)):
                block = lines[3 + 4 * i: 7 + 4 * i]
                order_key, p, q = block[0].split()
                if order_key != 'ORDER':
                    raise ValueError(f"expected ORDER, found {order_key}")
                f1, f2, data = ([float(v) for v in row.split()] for row in block[1:4])
                measurements.add(Experiment(
                    BoundaryData(mesh, f1), BoundaryData(mesh, f2), (int(p), int(q)),
                    DNMeasurement(mesh, data),
                ))
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"Malformed measurement file: {exc}", code='invalid_measurement_file')
        return measurements

    def write(self, measurements, path):
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.dumps(measurements))

    def read(self, path, mesh):
        with open(path, encoding='utf-8') as handle:
            return self.loads(handle.read(), mesh)
