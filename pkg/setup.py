from setuptools import find_packages, setup


# please indent the lists with one element per line
# for convenience of version control tools

setup(
    name='covspec',
    packages=find_packages(exclude=['tests', 'tests.*']),  # find all packages in the project instead of listing them 1-by-1
    version='0.1.0',
    description='covspec simulates device-edge collaborative speculative decoding',
    python_requires='>=3.9',
    include_package_data=True,
    package_data={'covspec': ['stopwords.txt']},
    entry_points={'console_scripts':
                  [
                      'covspec=covspec.cli:main',
                  ]},
    license='MIT',
    install_requires=[
        'numpy',
        'tqdm',
        'psutil',
        'dataclasses-json',
        'pyyaml',
        'setuptools',  # pkg_resources reads the packaged stopword list
    ],
    extras_require={
        'test': [
            'pytest',
        ]
    },
)
