import setuptools
from pathlib import Path

long_description = (Path(__file__).parent / "README.rst").read_text()
setuptools.setup(
    name="temporalot",
    version="1.0.0",
    description="Noise robust temporal alignment of video clips and captions with entropic optimal transport.",
    packages=setuptools.find_packages(),
    install_requires=['numpy', 'scipy', 'quicktions'],
    python_requires='>=3.9',
    entry_points={'console_scripts': ['temporalot=temporalot.cli:main']},
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    long_description=long_description,
    long_description_content_type='text/x-rst',
    include_package_data=True
)
