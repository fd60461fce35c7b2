import math

import numpy as np
from django.core.exceptions import ValidationError as ModelValidationError
from rest_framework import serializers

from .models import Mesh, NodeTag
from .services.mesh_builder import CAVITY_CLEARANCE


class MeshTextSerializer:
    """
    Line-oriented mesh format::

        MESH2D v1
        V <n>
        x y TAG
        T <m>
        i j k region
        B <b>
        i j TAG

    Coordinates are written with ``repr`` so a round trip is exact.
    """

    HEADER = 'MESH2D v1'

    def dumps(self, mesh):
        lines = [self.HEADER, f"V {mesh.n_vertices}"]
        tags = mesh.node_tags
        for (x, y), tag in zip(mesh.vertices, tags):
            lines.append(f"{float(x)!r} {float(y)!r} {NodeTag.label(tag)}")
        lines.append(f"T {mesh.n_triangles}")
        for (i, j, k), region in zip(mesh.triangles, mesh.cell_regions):
            lines.append(f"{i} {j} {k} {region}")
        lines.append(f"B {len(mesh.boundary_edges)}")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.edge_tags):
            lines.append(f"{i} {j} {NodeTag.label(tag)}")
        return '\n'.join(lines) + '\n'

    def loads(self, text):
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or lines[0] != self.HEADER:
            raise ModelValidationError("Missing 'MESH2D v1' header", code='invalid_mesh_file')
        cursor = 1

        def block(name):
            nonlocal cursor
            try:
                key, count = lines[cursor].split()
                count = int(count)
            except (IndexError, ValueError):
                raise ModelValidationError(f"Expected '{name} <count>' block", code='invalid_mesh_file')
            if key != name:
                raise ModelValidationError(f"Expected block '{name}', found '{key}'", code='invalid_mesh_file')
            rows = [line.split() for line in lines[cursor + 1:cursor + 1 + count]]
            if len(rows) != count:
                raise ModelValidationError(f"Block '{name}' is truncated", code='invalid_mesh_file')
            cursor += count + 1
            return rows

        try:
            vertex_rows = block('V')
            vertices = np.array([[float(r[0]), float(r[1])] for r in vertex_rows]).reshape(-1, 2)
            triangle_rows = block('T')
            triangles = np.array([[int(v) for v in r[:3]] for r in triangle_rows], dtype=np.int64)
            regions = np.array([int(r[3]) for r in triangle_rows], dtype=np.int64)
            edge_rows = block('B')
            edges = np.array([[int(r[0]), int(r[1])] for r in edge_rows], dtype=np.int64)
            edge_tags = np.array([NodeTag.from_label(r[2]) for r in edge_rows], dtype=np.int64)
        except (IndexError, ValueError) as exc:
            raise ModelValidationError(f"Malformed mesh file: {exc}", code='invalid_mesh_file')

        mesh = Mesh(vertices, triangles, edges, edge_tags, regions).validate()
        declared = np.array([NodeTag.from_label(r[2]) for r in vertex_rows])
        if not np.array_equal(declared, mesh.node_tags):
            raise ModelValidationError(
                "Vertex tags disagree with the boundary edge tags",
                code='invalid_mesh_file',
            )
        return mesh

    def write(self, mesh, path):
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.dumps(mesh))

    def read(self, path):
        with open(path, encoding='utf-8') as handle:
            return self.loads(handle.read())


class CavitySerializer(serializers.Serializer):
    center = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2)
    radius = serializers.FloatField(min_value=0.0)


class MeshParametersSerializer(serializers.Serializer):
    """Geometry section of a scenario configuration."""

    radius = serializers.FloatField(default=1.0, min_value=0.0)
    h = serializers.FloatField(default=0.1, min_value=0.0)
    cavity = CavitySerializer(required=False, allow_null=True, default=None)
    gamma = serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2,
        default=lambda: [0.0, 2.0 * math.pi],
    )

    def validate(self, data):
        if not 0 < data['h'] < data['radius']:
            raise serializers.ValidationError("Mesh size h must satisfy 0 < h < radius")
        if data['gamma'][1] < data['gamma'][0]:
            raise serializers.ValidationError("Gamma arc end must not precede its start")
        cavity = data.get('cavity')
        if cavity:
            clearance = math.hypot(*cavity['center']) + cavity['radius'] + CAVITY_CLEARANCE * data['h']
            if clearance > data['radius']:
                raise serializers.ValidationError("Cavity is too close to the outer boundary")
        return data
